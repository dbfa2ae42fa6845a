"""EMG gesture classification with a hybrid LIF/DEXAT recurrent spiking network."""

__version__ = "0.1.0"
