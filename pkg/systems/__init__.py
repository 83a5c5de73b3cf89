"""
Built-in reach-avoid systems.

Each module exposes ``build(**params) -> ProblemSetup`` and ``DEFAULT_PARAMS``;
configs name them under ``system: {name: ..., params: {...}}``.
"""
