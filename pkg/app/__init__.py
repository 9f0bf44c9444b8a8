# Vectorsmith – flash-loan attack vector synthesis
