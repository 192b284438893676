# Diagnostic digital twin for wind turbine SCADA data
