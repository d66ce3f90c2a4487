"""Amodal optical flow toolkit: layered flow I/O, AFQ metrics, synthetic ground truth, baselines and tracking."""
