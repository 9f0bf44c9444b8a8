# Vectorsmith services
