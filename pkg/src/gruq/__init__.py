"""gruq: integer-only GRU quantization with mixed-precision bit-width search.

Modules:
  fxp     -- quantization parameters and fixed-point multiplier arithmetic
  qops    -- quantized linear/add/mul/complement kernels and activation LUTs
  qgru    -- the end-to-end integer GRU classifier
  refnet  -- float reference GRU, training, and quantization-aware fine-tuning
  calib   -- post-training range calibration
  evolve  -- NSGA-II search over per-block bit-widths
  dataio  -- IDX loading and a synthetic sequence-classification task
  cli     -- command-line front end
"""

__version__ = "0.1.0"
