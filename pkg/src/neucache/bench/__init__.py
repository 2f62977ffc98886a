"""Metrics, FLOP accounting, evaluation protocols and ablation harnesses."""
from .ablation import CACHE_ROWS, COMPONENT_ROWS, AblationFlags, AblationRow, run_ablation, write_ablation_csv
from .evaluate import (
    DEFAULT_TIMING, NOVEL_BINS_DEG, PROTOCOLS, ProtocolResult, accepted_frames, block_pairs, evaluate_generator,
    evaluate_novel_view, evaluate_offline, evaluate_online, evaluate_protocol, linear_fit, novel_view_dataset,
    warp_distance_sweep, warp_images, write_sweep_csv,
)
from .flops import affine_macs, conv_macs, count_flops, flop_ratio, layer_table, traced_macs
from .images import encode_png, encode_ppm, to_uint8, write_png, write_ppm
from .metrics import MetricsResult, compute_metrics, gaussian_window, l1_error, psnr, ssim
from .timing import model_latencies, time_call, warp_latency

__all__ = [
    "AblationFlags", "AblationRow", "COMPONENT_ROWS", "CACHE_ROWS", "run_ablation", "write_ablation_csv",
    "DEFAULT_TIMING", "NOVEL_BINS_DEG", "PROTOCOLS", "ProtocolResult", "accepted_frames", "block_pairs",
    "evaluate_generator", "evaluate_novel_view", "evaluate_offline", "evaluate_online", "evaluate_protocol",
    "linear_fit", "novel_view_dataset", "warp_distance_sweep", "warp_images", "write_sweep_csv",
    "affine_macs", "conv_macs", "count_flops", "flop_ratio", "layer_table", "traced_macs",
    "encode_png", "encode_ppm", "to_uint8", "write_png", "write_ppm",
    "MetricsResult", "compute_metrics", "gaussian_window", "l1_error", "psnr", "ssim",
    "model_latencies", "time_call", "warp_latency",
]
