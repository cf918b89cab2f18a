"""Physical constants (SI, CODATA exact values)."""

PLANCK_J_S = 6.62607015e-34
C_VAC_M_S = 299792458.0

# Time-tagger tick chosen so that 16 ticks equal the 1.317 ns analysis bin.
DEFAULT_TICK_S = 82.3125e-12
