# KCPSIM Package
