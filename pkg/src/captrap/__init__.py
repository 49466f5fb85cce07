"""Object-oriented backdoor poisoning toolkit for image-captioning datasets.

Submodules: imageio (P6 I/O, resize), regions (detections, eligibility),
trigger (noise and patch injection), poisoner (dataset poisoning and
synthetic data), metrics (BLEU/ASR/FTR), cli (command-line surface).
"""

__version__ = "0.1.0"
