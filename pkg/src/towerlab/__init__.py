"""Simulation and verification lab for slowly mixing intermittent interval
maps: exact map dynamics, the tower Markov chain with meeting-time coupling,
the symbolic bridge between them, statistical estimators, and an empirical
strong-approximation probe.
"""

from .maps import (MapModel, Observable, ReturnPartition, birkhoff_sum,
                   left_preimage, make_observable, partition, return_time,
                   sample_invariant, step, tau_tail)
from .tower import (CoupledRun, TowerSpec, coupled_run, induce_aperiodic,
                    meeting_times, run_chain, separation, stationary_nu,
                    synthetic_spec, update, validate_spec)
from .symbolic import (Cylinder, Decomposition, cylinder, decompose, project,
                       pushforward_test)
from .estimators import (ExponentFit, VarianceEstimate, autocovariance,
                         ks_test, maximal_inequality_check, moment_tracker,
                         rosenthal_check, tail_exponent, tv_mixing_finite,
                         variance_c2)
from .asip import (BlockScheme, CoupledPath, block_params, block_sums,
                   cobas_check, doubly_windowed_X, gaussian_couple, nu_ell,
                   optimality_counter, periodic_transfer, rate_fit,
                   windowed_X)
from .report import ExperimentReport
from .cli import run as run_experiment

__version__ = "0.1.0"
