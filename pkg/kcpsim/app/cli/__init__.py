# KCPSIM CLI Package
