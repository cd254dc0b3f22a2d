"""Numpy array field types for pydantic models."""

from typing import Annotated

import numpy as np
from pydantic import PlainSerializer, PlainValidator


def _readonly(dtype):
    def validate(value) -> np.ndarray:
        array = np.array(value, dtype=dtype, copy=True)
        array.setflags(write=False)
        return array

    return validate


FloatArray = Annotated[
    np.ndarray,
    PlainValidator(_readonly(np.float64)),
    PlainSerializer(lambda a: a.tolist(), return_type=list),
]

IntArray = Annotated[
    np.ndarray,
    PlainValidator(_readonly(np.int64)),
    PlainSerializer(lambda a: a.tolist(), return_type=list),
]

BoolArray = Annotated[
    np.ndarray,
    PlainValidator(_readonly(np.bool_)),
    PlainSerializer(lambda a: a.tolist(), return_type=list),
]
