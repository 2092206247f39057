"""Wire protocol between the controller and the agents"""
