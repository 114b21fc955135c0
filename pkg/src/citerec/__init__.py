"""Two-stage local citation recommendation.

Stage one enriches every document vector with its public profile from the
citation graph and retrieves candidates by exact cosine search; stage two
reranks them with a learned vector-gated fusion of pair semantics and
rank-derived confidence priors, evaluated under a temporally inductive
protocol.
"""

__version__ = "0.1.0"
