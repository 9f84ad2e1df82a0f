"""proofsynth: retrieval-augmented synthesis harness for proof-oriented programs.

The package splits the pipeline into small composable pieces:

- ``lang``      lexer, identifier extraction, type taxonomy, clone normal forms
- ``corpus``    definition records, file dependence graph, splits, clone report
- ``embed``     deterministic local embeddings and a remote provider contract
- ``retrieve``  similarity index and budgeted related-example retrieval
- ``premsel``   premise selection: training pairs, MSE objective, ranking, MAP/NDCG
- ``prompt``    budgeted prompt assembly in three formats with ablations
- ``generate``  generation client contract, retries, and a deterministic mock
- ``check``     escape-hatch screening, checker protocol client, error classes
- ``metrics``   verify@k and friends, edit distance, identifier overlap
- ``cli``       configuration and the pipeline commands
"""

__version__ = "0.1.0"
