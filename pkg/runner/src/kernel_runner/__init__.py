"""Execution sandbox for kernel candidates.

Compiles candidate kernels, generates seeded inputs, checks outputs against
the reference implementation under an elementwise tolerance, times both, and
speaks a line-delimited JSON protocol on standard streams. A mock mode
serves deterministic outcomes from a source-hash cost table.
"""

from .executor import EvalOutcome, compare_outputs, compile_kernel, evaluate_full
from .ops import NUMPY_OPS, generate_input, generate_inputs, inputs_digest
from .server import (
    PROTOCOL_VERSION,
    RunnerSettings,
    handle_request,
    load_mock_table,
    resolve_device,
    serve,
)

__version__ = "0.1.0"
