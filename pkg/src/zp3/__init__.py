"""Partial-observation 3D reconstruction with prior-fused diffusion sampling.

Subpackages and modules:
  diffusion   - noise schedule, prior fusion, DDIM stepping, sampling loop
  splat       - gaussian scene, differentiable CPU renderer, density control
  views       - cameras, view classification, rotated-view planning
  priors      - noise-predictor interface, analytic oracles, render prior
  bridge      - binary wire protocol to external predictor backends
  reconstruct - coarse fitting and iterative refinement
  metrics     - PSNR / SSIM and the visible-invisible evaluation protocol
  cli         - the `zp3` command
"""

__version__ = "0.1.0"
