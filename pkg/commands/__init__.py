# Verbos de la línea de comandos del laboratorio
