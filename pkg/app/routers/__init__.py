# Vectorsmith routers
