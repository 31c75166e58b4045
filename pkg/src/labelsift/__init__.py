"""labelsift: progressive clean-sample selection with debiased
semi-supervised training for learning from noisy labels."""

from .augment import AugmentedBatch, AugmentPolicy
from .calibration import ClassPrior, debias_logits, dml_loss, sharpen
from .config import RunConfig
from .data import (DatasetBundle, ImbalanceSpec, NoiseSpec, TrainView,
                   inject_asymmetric_noise, inject_symmetric_noise,
                   load_external_labels, make_imbalanced, make_synthetic_dataset)
from .models import (DualHeadClassifier, PeerPair, ScheduleSpec, ensemble_predict,
                     make_peer_pair, schedule_value, warmup)
from .selection import (FilterConfig, SelectionState, apply_cap, build_partition,
                        css_select, lga_select, mhcs_select)
from .training import (LossBreakdown, LossConfig, PriorPair, consistency_loss,
                       mixup_pair, supervised_loss, train_epoch, unsupervised_loss)

__version__ = "0.1.0"
