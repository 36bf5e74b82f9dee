"""Two-stage CATE estimation: lasso nuisances, doubly-robust scores, local regression, bootstrap bands."""
