"""GHZ-state entanglement certification on simulated heavy-hexagon hardware.

Modules: ``device`` (graph, embeddings, schedules), ``circuit`` (gate IR),
``simulator`` (trajectories, exact density evolution), ``mitigation``
(readout inversion, parity post-selection), ``analysis`` (MQC pipeline and
statistics), ``calcheck`` (readout-assumption audits) and ``cli``.
"""

__version__ = "0.1.0"
