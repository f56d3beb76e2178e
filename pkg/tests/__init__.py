# Pruebas del laboratorio de predicción de defectos
