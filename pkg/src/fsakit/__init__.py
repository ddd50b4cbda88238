"""fsakit: gradient-sign adversarial attacks with a frequency/spatial
consistency wrapper, from-scratch victim models, and a deterministic
evaluation harness."""

from .attacks import (
    METHODS,
    AttackConfig,
    AttackResult,
    BatchAttackOutcome,
    MomentumState,
    attack_batch,
    consistency_mask,
    diverse_input_transform,
    frequency_step,
    fsa_step,
    gaussian_kernel,
    run_attack,
    spatial_step,
    translation_smooth,
)
from .datagen import generate_digits, render_digit
from .frequency import DctMode, DctPlan, dct2, frequency_pullback, get_plan, idct2
from .harness import (
    CSV_COLUMNS,
    Dataset,
    EvalReport,
    IdxFormatError,
    compare_fsa,
    comparison_markdown,
    evaluate,
    load_idx,
    reports_to_csv,
    save_idx_images,
    save_idx_labels,
    save_png,
    sweep,
    write_csv,
)
from .model import (
    Classifier,
    Conv2d,
    Flatten,
    LabeledImage,
    Linear,
    MaxPool2d,
    ReLU,
    WeightFormatError,
    build_cnn,
    build_mlp,
    forward,
    input_gradient,
    load_weights,
    loss,
    predict,
    save_weights,
    softmax,
    train,
)
from .tensor_ops import clamp, conv2d, sign

__version__ = "0.1.0"
