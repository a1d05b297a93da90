"""Total-UPDRS regression from telemonitoring voice recordings.

The pipeline: ingest the UCI-format CSV, rank and eliminate features with
a depth-scored random forest, grow the training folds by Gaussian
jittering, train a bidirectional LSTM with attention by hand-derived
backpropagation, fit four linear reference solvers on the same folds, and
emit cross-validated MSE and R2 report tables.
"""

__version__ = "0.1.0"
