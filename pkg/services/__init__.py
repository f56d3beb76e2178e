# Servicios del laboratorio de predicción de defectos
