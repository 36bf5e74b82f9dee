from api import v1

cli = v1.group
