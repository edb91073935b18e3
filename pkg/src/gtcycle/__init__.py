"""Joint graph-to-text / text-to-graph learning with cycle training.

A single sequence-to-sequence model learns both directions at once; task
prefixes on the input select which modality to produce.  Supervised
fine-tuning on aligned pairs is followed by semi-supervised cycle training
on non-parallel graph and text pools, where the model's own predictions
serve as synthetic inputs and the real data as references.
"""

__version__ = "0.1.0"
