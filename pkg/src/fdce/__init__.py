"""Frequency-domain underwater image enhancement pipeline.

Library layout:
  tensor   - autodiff tensor core
  fourier  - 2D transforms and amplitude/phase decomposition
  imageio  - image files, paired datasets, augmentation, histograms
  fsnet    - frequency spatial residual block and coarse-enhancement U-net
  dce      - dual color encoder (feature pyramid + query transformer)
  fusion   - fusion network and the full model
  losses   - SSIM / L1 / histogram / perceptual training losses
  metrics  - PSNR, SSIM, MSE, UIQM, UCIQE
  train    - AdamW, LR schedule, training loop, checkpoints
  cli      - command-line entry point
"""

__version__ = "0.1.0"
