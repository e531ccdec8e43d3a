"""Timing reshaping of malicious traffic against anomaly-based NIDS, at desk scale.

Modules:

* ``trace_io``    packet records, pcap and canonical text traces, splits
* ``synthetic``   labeled synthetic traffic profiles
* ``features``    streaming damped-statistics feature extractor
* ``reshaper``    LSTM that learns benign inter-packet delays and rewrites timestamps
* ``nids``        autoencoder, KitNET ensemble and isolation-forest detectors
* ``mitigation``  supervised detectors evaluated leave-one-attack-out
* ``netsim``      discrete-event proxy / target / NIDS simulation
* ``experiment``  config-driven baseline, window sweep, end-to-end and mitigation runs
"""

__version__ = "0.1.0"
