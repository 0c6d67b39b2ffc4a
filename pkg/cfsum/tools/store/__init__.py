# Artifact store package
