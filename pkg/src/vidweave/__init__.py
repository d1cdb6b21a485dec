"""Video question answering with two-stage, frame-interleaved reasoning.

The package covers the full loop: loading multiple-choice video QA samples,
building key-frame benchmarks with human review, running answering strategies
against multimodal chat backends, and scoring the results per category.
"""

__version__ = "0.1.0"
