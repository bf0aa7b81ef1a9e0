"""Instance-mask forecasting: flow forecasting, learned mask warping and evaluation."""

import json as _json

import torch as _torch  # noqa: F401  loads the libtorch shared libraries first

from ._flowcast import (  # noqa: F401
    ConfigError,
    FlowForecaster,
    FormatError,
    IoError,
    MaskWarper,
    ShapeError,
    average_precision,
    bbox_iou,
    copy_last,
    dice_loss,
    flow_mse,
    flow_read,
    flow_write,
    fuse_semantic,
    loss_flow,
    mask_iou,
    rescore,
    semantic_iou,
    set_logging,
    shift_mask,
    warp_iterated,
    warp_mask,
)
from . import _flowcast

__version__ = "0.1.0"


def generate(config=None, **overrides):
    """Synthesises one sequence; returns flows [L-1,H,W,2], semantics [L,H,W] and per-frame instances."""
    cfg = dict(config or {}, **overrides)
    return _flowcast._generate(_json.dumps(cfg))


def emit_dataset(out_dir, n_sequences, config=None, **overrides):
    """Writes a dataset directory and returns the manifest path."""
    cfg = dict(config or {}, **overrides)
    return _flowcast._emit_dataset(_json.dumps(cfg), n_sequences, str(out_dir))


def desk_config():
    """Default experiment configuration as a dict."""
    return _json.loads(_flowcast._desk_config())


def run_pipeline(config):
    """Trains and evaluates one configuration; returns the report dict."""
    return _json.loads(_flowcast._run_pipeline(_json.dumps(config)))


def new_forecaster(config, seed=0):
    return FlowForecaster(_json.dumps(config), seed)


def new_warper(config, seed=0):
    return MaskWarper(_json.dumps(config), seed)
