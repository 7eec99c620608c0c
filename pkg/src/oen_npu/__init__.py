# oen-npu - performance modeler and simulator for a CIS-based optoelectronic NPU

__version__ = "0.1.0"
