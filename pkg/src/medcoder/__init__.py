"""medcoder: explainable automated clinical coding.

Predicts ICD-9 codes from clinical letters with a hierarchical
(label-)attention network, resolves codes to SNOMED CT, exports per-token
attention heatmaps, and serves a human review loop over HTTP.
"""

__version__ = "0.1.0"
