"""AM-Net: risky object localization from tracked-object feature sequences.

Set ``AMNET_BACKEND=numpy`` before import to run the recurrent kernels without
numba.
"""

from ._backend import BACKEND
from .errors import AmnetError, DomainError, NumericError, ShapeError, ValidationError
from .metrics import MetricsReport, evaluate, frame_auc, mtta, object_auc, stratified_report, tta
from .model import (FrameObservation, ModelConfig, ModelParams, ObjectObservation, RiskinessTimeline,
                    backward_video, forward_frame, forward_video, init_params)
from .synthdata import (DatasetManifest, ScenarioConfig, VideoSample, generate_dataset, generate_video,
                        read_manifest, read_video_file, write_video_file)
from .training import (Checkpoint, LossWeights, TrainConfig, checkpoint_load, checkpoint_save, train,
                       weighted_ce_loss)

__version__ = "0.1.0"
