# Empty __init__.py file
