# EZ-PGDPO source package
