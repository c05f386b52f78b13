"""Extended-CPI passive bistatic radar processing.

Synthesises reference/surveillance pairs for bistatic scenes and processes
them with batched range compression, keystone range-walk removal,
dechirp/dejerk Doppler-walk removal, reference synchronisation and peak
detection, with a direct ambiguity-function evaluator as ground truth.
"""

__version__ = "0.1.0"
