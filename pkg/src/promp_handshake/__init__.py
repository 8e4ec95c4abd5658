"""Learning robot handshake reaches from human skeleton recordings.

Probabilistic movement primitives over right-arm joint angles, a recurrent
predictor of the partner's final hand position, and a controller that
conditions the primitive on a blend of predicted and observed hand.
"""
from .control import BlendConfig, InteractionLog, blend_target, controller_step, finish, new_controller
from .errors import (ContractError, EmptyInputError, ExtractionError, HandshakeError, LoadError,
                     NumericalError, ParseError, PipelineError, SegmentationRejected, ValidationError)
from .kinematics import ArmModel, extract_joint_angles, forward_kinematics, jacobian
from .pipeline import PipelineConfig, evaluate, prepare_dataset, run_interaction
from .predictor import PredictorConfig, PredictorSession, predict_final_hand
from .promp import (BasisConfig, ProMP, TaskTarget, condition_joint_space, condition_task_space,
                    fit_weights, learn_promp, marginal)
from .skeleton import (SegmentationConfig, SkeletonSequence, parse_skeleton_file, segment_reach_phase,
                       select_upper_body, validate_sequence)

__version__ = "0.1.0"
