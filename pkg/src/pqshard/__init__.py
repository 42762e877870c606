"""Distributed IVF-PQ vector search with disaggregated memory nodes.

Library layout:

- :mod:`pqshard.pq` / :mod:`pqshard.ivf` — product-quantization codec and
  inverted-file index (train, encode, probe).
- :mod:`pqshard.kselect` — bounded top-k buffers and the truncated
  two-level selector with its binomial sizing model.
- :mod:`pqshard.memnode` / :mod:`pqshard.coordinator` — sharded memory-node
  query service and the broadcasting/merging coordinator.
- :mod:`pqshard.driver` — mock token-generation client issuing periodic
  retrievals.
- :mod:`pqshard.perfmodel` — analytic throughput-ratio and multi-node
  latency models.
- :mod:`pqshard.oracle` — brute-force references and recall metrics.
"""

__version__ = "0.1.0"
