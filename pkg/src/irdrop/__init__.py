"""Static IR-drop analysis toolkit for power delivery networks.

Exact golden solver over SPICE netlists, circuit-feature rasterization,
lossless point-cloud netlist encoding, and a multimodal prediction model
with a two-stage training pipeline and contest metrics.
"""

from .spice import PdnNetlist, parse_netlist, write_netlist
from .solver import NodeSolution, solve_static, verify_kcl
from .rasterize import FeatureStack, GridSpec, build_feature_stack
from .pointcloud import PointCloud, cap_pointcloud, decode_pointcloud, encode_pointcloud
from .model import IrDropModel, ModelConfig
from .train import TrainConfig, evaluate, f1_score, mae, train
from .synth import GenSpec, generate, generate_dataset

__all__ = [
    "PdnNetlist", "parse_netlist", "write_netlist",
    "NodeSolution", "solve_static", "verify_kcl",
    "FeatureStack", "GridSpec", "build_feature_stack",
    "PointCloud", "cap_pointcloud", "decode_pointcloud", "encode_pointcloud",
    "IrDropModel", "ModelConfig",
    "TrainConfig", "evaluate", "f1_score", "mae", "train",
    "GenSpec", "generate", "generate_dataset",
]
