"""Resilient safety unlearning for a toy conditional diffusion model.

Modules
-------
autodiff     reverse-mode gradients and forward-over-reverse HVPs
diffusion    2-D Gaussian-mixture concepts, denoiser, schedule, sampler
objectives   harmful / preservation / fine-tuning losses
adapt        simulated downstream fine-tuning and its config distribution
hypergrad    implicit hypergradient via Richardson iteration, plus oracles
unlearn      outer loops: resilient meta unlearner and plain baseline
evalharness  harmfulness metric, attack curves, curvature checks
cli          train-base / unlearn / attack / eval / report commands
"""
