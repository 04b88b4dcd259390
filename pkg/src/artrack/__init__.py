"""Audio-referred multi-object tracking: a small numpy reference implementation.

Submodules:

- ``tensor``: dense arrays with reverse-mode gradients and finite-difference checks
- ``spectral``: DFT/FFT, Gaussian frequency kernels, differentiable transforms
- ``fusion``: bi-directional cross attention with frequency-domain filtering
- ``actl``: audio/trajectory contrastive loss
- ``matching``: Hungarian assignment, focal and GIoU losses, referral rule
- ``metrics``: HOTA, MOTA and IDF1 over MOT-style CSV files
- ``synth``, ``train``: synthetic scenes and the toy end-to-end trainer
"""

__version__ = "0.1.0"
