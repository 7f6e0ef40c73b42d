"""Subgroup-robustness benchmarking for tabular binary classifiers.

Subpackages and modules: ``data`` (schemas, encoding, splits), ``metrics``
(overall and per-group metrics, robust risks, confidence intervals),
``learners`` (trees, boosting, forests, linear models, MLPs), ``robust``
(batch training objectives), ``frontier`` (performance frontiers) and
``sweep`` (grids, execution, selection and reports).
"""
