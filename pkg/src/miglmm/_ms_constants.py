"""Frozen k=8 normal-CDF mixture approximation of the inverse logit.

Generated by scripts/fit_sigmoid_mixture.py (minimax fit on |z| <= 40;
achieved sup error 2.108645e-09).  Do not edit by hand.
"""

MAX_ABS_ERROR = 2.108645147380628e-09

WEIGHTS = (
    0.003246352138138569,
    0.05151759120498705,
    0.19507814051258845,
    0.31556986877191234,
    0.2741494027860906,
    0.13107671515918778,
    0.027912365440027547,
    0.0014495639870676662,
)

SCALES = (
    1.3653405943543975,
    1.0595237138755589,
    0.8307910667567081,
    0.650731965108571,
    0.5081352787303883,
    0.39631324651330213,
    0.3089041893455067,
    0.2382125788400232,
)
