"""Energy-efficient power allocation for multicarrier massive-MIMO sensing and communication."""
