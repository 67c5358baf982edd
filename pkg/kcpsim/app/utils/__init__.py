# KCPSIM Utils Package
