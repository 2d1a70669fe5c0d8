"""Counter-example guided safety repair for small dense ReLU networks."""

from .errors import (BudgetError, CexRepairError, DimensionError, DivergenceError, EmptyDataset,
                     InvalidBox, LossKindError, OutOfBox, ParseError, SpecError, UnknownProperty,
                     UnsupportedAtom)
from .network import (Dataset, Layer, Network, Normalization, forward, forward_batch, load_json,
                      load_network, load_nnet, save_json, uniform_sample)
from .repair import (PenaltyState, RepairConfig, RepairOutcome, penalized_loss, repair_loop,
                     repair_step)
from .satfn import SatisfactionValue, f_sat, f_sat_atom, f_sat_grad_input, f_sat_grad_params
from .search import (CounterExample, SearchConfig, benchmark_optimizers, find_all,
                     find_counterexample, minimize)
from .spec import (Atom, Property, Specification, acasxu_properties, acasxu_property, bind,
                   format_spec, parse_spec, robustness_property, satisfies_point)
from .training import LossKind, TrainConfig, accuracy, gradient, loss, mae, train
from .verify import Verdict, VerifyConfig, clause_bound, interval_forward, verify

__version__ = "0.1.0"
