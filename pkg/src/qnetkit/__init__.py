"""Queueing-network performance evaluation toolkit.

Three engines predict flow-level delay, jitter, and loss for the same
NetworkSample format: a packet-level discrete-event simulator (ground
truth), a CTMC/fixed-point analytical solver, and a trainable graph
message-passing model.
"""

__version__ = "0.1.0"
