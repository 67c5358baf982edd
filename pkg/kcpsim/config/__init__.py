# KCPSIM Config Package
