"""Flexible-modal audio-visual deception detection at desk scale.

A self-contained stack: a float64 autodiff tensor core, transformer encoder
layers with temporal audio-visual adapters, fusion baselines, a training and
flexible-modal evaluation harness, and synthetic planted-signal datasets.
"""

from .tensor import (Tensor, Tape, TapeError, ShapeError, GradCheckReport,
                     backward, grad_check, no_grad)
from .layers import Parameter, ParamStore, init_params, set_trainable
from .backbone import AudioSpectrogram, TokenLayout, TokenSequence, VisualClip
from .fusion import AvaConfig, FusionMode, cmfl_loss, prompt_prepend
from .model import (MASK_A, MASK_V, MASK_VA, DeceptionModel, MaskError,
                    ModalityMask, ModelConfig, apply_mask, build_model,
                    count_parameters, preset)
from .training import (TrainConfig, cross_entropy, predict_scores, sgd_step,
                       SgdState, step_lr, train_model)
from .evaluation import (EvalReport, Metrics, ProtocolSpec, compute_metrics,
                         kfold_split, run_protocol)
from .data import (Dataset, DomainShift, Sample, SignalMode, SynthSpec,
                   gen_synthetic, read_dataset, synth_spec_for, write_dataset)
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"
