# MAC grid fields, operators and linear algebra
