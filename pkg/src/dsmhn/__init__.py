"""Deep supervised multimodal hashing built on hand-written backpropagation.

Two fully connected networks map image-like and text-like feature vectors
into a shared Hamming space; the resulting codes are searched by packed
popcount and scored with mAP, P@K and precision-recall.
"""

__version__ = "0.1.0"
