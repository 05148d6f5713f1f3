"""flowmtl: multi-task learning for network traffic classification.

Packet logs in, flows and feature matrices out, then a shared-trunk 1D CNN
with bandwidth, duration, and traffic-class heads trained under a masked,
weighted multi-task loss.
"""

__version__ = "0.1.0"
