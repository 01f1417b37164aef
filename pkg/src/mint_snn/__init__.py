"""Integer-only spiking neural network inference with shared-scale quantization.

Weights and membrane potentials of each layer share one scale, so the firing
test reduces to comparing an integer membrane against a precomputed integer
threshold and inference needs only adds, compares and shifts.
"""

from .analyzers import CostTable, footprint, inference_energy, pe_cost, sparsity
from .lif_reference import LifConfig, run_network_float
from .mint_engine import MintLayer, MintNetwork, OpCounter, mint_forward, mint_step, quantize_network
from .model_io import Checkpoint, load_checkpoint, save_checkpoint
from .network import LayerSpec, NetworkSpec, SpikeState, architecture
from .quantizer import QuantParams, compute_alpha, fake_quant, fold_threshold, quantize_weights
from .trainer import TrainConfig, backward_bptt, forward_simulated, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "CostTable", "LayerSpec", "LifConfig", "MintLayer", "MintNetwork", "NetworkSpec",
    "OpCounter", "QuantParams", "SpikeState", "TrainConfig", "architecture", "backward_bptt",
    "compute_alpha", "fake_quant", "fold_threshold", "footprint", "forward_simulated", "inference_energy",
    "load_checkpoint", "mint_forward", "mint_step", "pe_cost", "quantize_network", "quantize_weights",
    "run_network_float", "save_checkpoint", "sparsity", "train",
]
