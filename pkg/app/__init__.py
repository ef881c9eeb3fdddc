# π-SQUID Qubit Simulator
