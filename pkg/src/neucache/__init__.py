"""Neural-cache rendering: a deferred neural renderer whose decoder features
are cached at keyframes and re-used by a shallow implicit warp network, plus
sequential/parallel schedulers and the benchmark harness around them."""

__version__ = "0.1.0"
