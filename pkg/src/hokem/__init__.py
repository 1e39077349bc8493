"""Human and object keypoint extension module for HOI detection.

Mask-derived object keypoints, a human-object graph, an adaptive graph
convolutional network with keypoint attention, SGD training, probability
fusion with an appearance-based detector and role AP evaluation.
"""

from .evaluation import Detection, GroundTruth, compute_role_ap, fuse, iou, mean_ap
from .features import KeypointSet, compute_features, keypoint_features, neck_point, normalize_coordinates
from .geometry import (
    ObjectKeypoints,
    RasterMask,
    centroid,
    extract_object_keypoints,
    extreme_points,
    intermediate_keypoint,
)
from .hograph import GraphConfig, HOGraph, adjacency_stack, build_graph, normalize_adjacency, partition_neighborhoods
from .network import AGCLayer, HOAGCNModel, ModelConfig, SKALayer, bce_loss, load_checkpoint, save_checkpoint
from .training import HOSample, TrainConfig, generate_synthetic_dataset, lr_at, sgd_step, train

__version__ = "0.1.0"
