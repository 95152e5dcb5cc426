"""Canonical action-unit channel vocabulary shared across the package.

The output vector has 14 channels on the 0-5 intensity scale. The brow
raisers (AU1 inner / AU2 outer) are merged into a single channel because
they are performed together; merged ground truth is the mean of the two.
"""

NUM_AU = 14

# (code, FACS name) in channel order.
AU_CHANNELS = [
    ("AU1/2", "Brow Raiser"),
    ("AU4", "Brow Lowerer"),
    ("AU5", "Upper Lid Raiser"),
    ("AU6", "Cheek Raiser"),
    ("AU7", "Lid Tightener"),
    ("AU9", "Nose Wrinkler"),
    ("AU10", "Upper Lip Raiser"),
    ("AU12", "Lip Corner Puller"),
    ("AU14", "Dimpler"),
    ("AU15", "Lip Corner Depressor"),
    ("AU20", "Lip Stretcher"),
    ("AU24", "Lip Pressor"),
    ("AU25", "Lips Part"),
    ("AU26", "Jaw Drop"),
]

AU_CODES = [code for code, _ in AU_CHANNELS]
AU_INDEX = {code: i for i, code in enumerate(AU_CODES)}

AU_MIN = 0.0
AU_MAX = 5.0

# The 11 actions users can reliably perform in isolation; AU5, AU10 and
# AU14 are covered through compound expressions instead.
SINGLE_AU_ACTIONS = [
    "AU1/2", "AU4", "AU6", "AU7", "AU9", "AU12",
    "AU15", "AU20", "AU24", "AU25", "AU26",
]

# Canonical AU recipes for the 7 scripted expressions (channel code -> peak
# share of the expression's overall intensity).
EXPRESSIONS = {
    "happiness": {"AU6": 0.9, "AU12": 1.0, "AU25": 0.4},
    "sadness": {"AU1/2": 0.7, "AU4": 0.8, "AU15": 1.0},
    "fear": {"AU1/2": 0.8, "AU4": 0.6, "AU5": 1.0, "AU7": 0.5, "AU20": 0.9, "AU26": 0.6},
    "disgust": {"AU9": 1.0, "AU10": 0.8, "AU15": 0.6, "AU25": 0.4},
    "anger": {"AU4": 1.0, "AU5": 0.6, "AU7": 0.9, "AU24": 0.8},
    "surprise": {"AU1/2": 1.0, "AU5": 0.8, "AU25": 0.7, "AU26": 0.9},
    "contempt": {"AU12": 0.4, "AU14": 1.0},
}

EXPRESSION_NAMES = list(EXPRESSIONS)
