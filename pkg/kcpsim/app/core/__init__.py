# KCPSIM Core Package
